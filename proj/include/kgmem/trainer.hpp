#pragma once
// Training loop, memorization metrics (accuracy / MAC), evaluation cadence
// and repeat aggregation. Evaluation always runs on the training set: this
// is a memorization study, there is no held-out split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "kgmem/model.hpp"
#include "kgmem/tokenizer.hpp"

namespace kgmem {

struct TrainConfig {
  int batch_size = 128;
  int epochs = 500;
  int eval_every = 2;
  uint64_t seed = 0;
  bool shuffle = true;
  double lr = 0.001;
  // Supervise every non-pad next-token position instead of only the target
  // mask (off by default: properties are inputs, not prediction targets).
  bool full_next_token_loss = false;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
  }
};

struct CapacityCurve {
  std::vector<int> eval_epochs;
  std::vector<double> accuracy;
  std::vector<int64_t> mac;
  std::vector<double> loss;  // mean training loss over the evaluated epoch
  int64_t n_predictions = 0;

  bool operator==(const CapacityCurve& o) const {
    return eval_epochs == o.eval_epochs && accuracy == o.accuracy && mac == o.mac &&
           loss == o.loss && n_predictions == o.n_predictions;
  }
};

struct EvalResult {
  double accuracy = 0;
  int64_t mac = 0;
  int64_t n_predictions = 0;
};

// Teacher-forced greedy evaluation: the prediction for a masked position t
// is the argmax of the logits at t-1 (ties broken by lowest token id).
template <class Real>
EvalResult evaluate(const Parameters<Real>& params, const ModelConfig& cfg,
                    const EncodedBatch& batch, int chunk_rows = 256) {
  const int N = batch.tokens.rows, T = batch.tokens.cols, V = cfg.vocab_size;
  EvalResult res;
  for (int begin = 0; begin < N; begin += chunk_rows) {
    const int rows = std::min(chunk_rows, N - begin);
    Grid<int32_t> tokens(rows, T);
    for (int r = 0; r < rows; ++r)
      std::copy(batch.tokens.row_ptr(begin + r), batch.tokens.row_ptr(begin + r) + T,
                tokens.row_ptr(r));
    MatR<Real> logits = forward(params, cfg, tokens, Mode::eval);
    for (int r = 0; r < rows; ++r) {
      for (int t = 1; t < T; ++t) {
        if (!batch.target_mask(begin + r, t)) continue;
        const Real* lrow = logits.data() + (static_cast<size_t>(r) * T + t - 1) * V;
        int32_t arg = 0;
        Real best = lrow[0];
        for (int i = 1; i < V; ++i) {
          if (lrow[i] > best) {
            best = lrow[i];
            arg = i;
          }
        }
        ++res.n_predictions;
        if (arg == batch.tokens(begin + r, t)) ++res.mac;
      }
    }
  }
  if (res.n_predictions > 0)
    res.accuracy = static_cast<double>(res.mac) / static_cast<double>(res.n_predictions);
  return res;
}

// One training run. Owns the parameters and Adam state; epochs can be run
// one at a time, checkpointed at epoch boundaries, and resumed bit-exactly
// (per-epoch RNG streams are derived from (seed, epoch)).
class Trainer {
 public:
  Trainer(const ModelConfig& cfg, const TrainConfig& tcfg, const EncodedBatch& data)
      : cfg_(cfg), tcfg_(tcfg), data_(&data) {
    cfg_.validate();
    tcfg_.validate();
    if (data.tokens.rows < 1) throw std::invalid_argument("Trainer: empty dataset");
    params_ = init_params<float>(cfg_, tcfg_.seed);
    adam_ = AdamState<float>::make(cfg_, tcfg_.lr);
    build_loss_mask();
    curve_.n_predictions = data.n_predictions();
  }

  static Trainer resume_from(const std::string& ckpt_path, const TrainConfig& tcfg,
                             const EncodedBatch& data) {
    Checkpoint<float> ck = load_checkpoint<float>(ckpt_path);
    TrainConfig t = tcfg;
    t.seed = ck.seed;
    Trainer tr(ck.cfg, t, data);
    tr.params_ = std::move(ck.params);
    tr.adam_ = std::move(ck.adam);
    tr.epoch_ = static_cast<int>(ck.epoch);
    return tr;
  }

  void save(const std::string& path) const {
    save_checkpoint(path, cfg_, params_, adam_, tcfg_.seed, epoch_);
  }

  void run_epoch() {
    const int epoch = ++epoch_;
    const int N = data_->tokens.rows, T = data_->tokens.cols;
    std::vector<int> order(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) order[static_cast<size_t>(i)] = i;
    if (tcfg_.shuffle) {
      Rng shuffle_rng = make_stream(tcfg_.seed, Stream::shuffle, static_cast<uint64_t>(epoch));
      shuffle_rng.shuffle(order);
    }
    Rng rrelu_rng = make_stream(tcfg_.seed, Stream::rrelu, static_cast<uint64_t>(epoch));

    double epoch_nll = 0;
    int64_t epoch_count = 0;
    int step = 0;
    for (int begin = 0; begin < N; begin += tcfg_.batch_size, ++step) {
      const int rows = std::min(tcfg_.batch_size, N - begin);
      Grid<int32_t> tokens(rows, T);
      Grid<uint8_t> mask(rows, T);
      int64_t mask_count = 0;
      for (int r = 0; r < rows; ++r) {
        const int src = order[static_cast<size_t>(begin + r)];
        std::copy(data_->tokens.row_ptr(src), data_->tokens.row_ptr(src) + T, tokens.row_ptr(r));
        std::copy(loss_mask_.row_ptr(src), loss_mask_.row_ptr(src) + T, mask.row_ptr(r));
        for (int t = 0; t < T; ++t) mask_count += mask(r, t);
      }
      const float loss = loss_and_grads(params_, cfg_, tokens, mask, grads_, &rrelu_rng);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "training diverged: non-finite loss " << loss << " at epoch " << epoch << " step "
           << step << " (adam step " << adam_.step << ")";
        throw std::runtime_error(os.str());
      }
      adam_step(params_, grads_, adam_);
      epoch_nll += static_cast<double>(loss) * static_cast<double>(mask_count);
      epoch_count += mask_count;
    }

    if (epoch % tcfg_.eval_every == 0 || epoch == tcfg_.epochs) {
      EvalResult ev = evaluate(params_, cfg_, *data_, tcfg_.batch_size);
      curve_.eval_epochs.push_back(epoch);
      curve_.accuracy.push_back(ev.accuracy);
      curve_.mac.push_back(ev.mac);
      curve_.loss.push_back(epoch_count > 0 ? epoch_nll / static_cast<double>(epoch_count) : 0.0);
    }
  }

  void run() {
    while (epoch_ < tcfg_.epochs) run_epoch();
  }

  int epoch() const { return epoch_; }
  const ModelConfig& config() const { return cfg_; }
  const Parameters<float>& params() const { return params_; }
  const CapacityCurve& curve() const { return curve_; }
  Parameters<float> take_params() { return std::move(params_); }

 private:
  void build_loss_mask() {
    if (!tcfg_.full_next_token_loss) {
      loss_mask_ = data_->target_mask;
      return;
    }
    const int N = data_->tokens.rows, T = data_->tokens.cols;
    loss_mask_ = Grid<uint8_t>(N, T);
    for (int r = 0; r < N; ++r)
      for (int t = 1; t < data_->lengths[static_cast<size_t>(r)]; ++t) loss_mask_(r, t) = 1;
  }

  ModelConfig cfg_;
  TrainConfig tcfg_;
  const EncodedBatch* data_;
  Parameters<float> params_;
  AdamState<float> adam_;
  Parameters<float> grads_;
  Grid<uint8_t> loss_mask_;
  CapacityCurve curve_;
  int epoch_ = 0;
};

struct TrainResult {
  Parameters<float> params;
  CapacityCurve curve;
};

inline TrainResult train(const ModelConfig& cfg, const TrainConfig& tcfg,
                         const EncodedBatch& data) {
  Trainer tr(cfg, tcfg, data);
  tr.run();
  TrainResult res;
  res.curve = tr.curve();
  res.params = tr.take_params();
  return res;
}

struct RepeatSummary {
  std::vector<int> eval_epochs;
  std::vector<double> mean_accuracy, sd2_accuracy;  // 2 x sample std (n-1)
  std::vector<double> mean_mac, sd2_mac;
  double final_mean_accuracy = 0, final_sd2_accuracy = 0;
  double final_mean_mac = 0, final_sd2_mac = 0;
  int repeats = 0;
};

namespace detail {

inline std::pair<double, double> mean_sd2(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = xs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return {mean, 2.0 * sd};
}

}  // namespace detail

inline RepeatSummary aggregate_repeats(const std::vector<CapacityCurve>& curves) {
  if (curves.size() < 2)
    throw std::invalid_argument("aggregate_repeats: need at least 2 curves");
  for (const auto& c : curves)
    if (c.eval_epochs != curves[0].eval_epochs)
      throw std::invalid_argument("aggregate_repeats: mismatched eval epoch grids");
  RepeatSummary s;
  s.repeats = static_cast<int>(curves.size());
  s.eval_epochs = curves[0].eval_epochs;
  const size_t n_points = s.eval_epochs.size();
  std::vector<double> acc(curves.size()), mac(curves.size());
  for (size_t i = 0; i < n_points; ++i) {
    for (size_t r = 0; r < curves.size(); ++r) {
      acc[r] = curves[r].accuracy[i];
      mac[r] = static_cast<double>(curves[r].mac[i]);
    }
    auto [am, asd] = detail::mean_sd2(acc);
    auto [mm, msd] = detail::mean_sd2(mac);
    s.mean_accuracy.push_back(am);
    s.sd2_accuracy.push_back(asd);
    s.mean_mac.push_back(mm);
    s.sd2_mac.push_back(msd);
  }
  if (n_points > 0) {
    s.final_mean_accuracy = s.mean_accuracy.back();
    s.final_sd2_accuracy = s.sd2_accuracy.back();
    s.final_mean_mac = s.mean_mac.back();
    s.final_sd2_mac = s.sd2_mac.back();
  }
  return s;
}

// --- curve CSV: epoch,accuracy,mac,loss ---

inline std::string curve_to_csv(const CapacityCurve& c) {
  std::ostringstream os;
  os << "epoch,accuracy,mac,loss\n";
  os << std::setprecision(10);
  for (size_t i = 0; i < c.eval_epochs.size(); ++i)
    os << c.eval_epochs[i] << ',' << c.accuracy[i] << ',' << c.mac[i] << ',' << c.loss[i] << '\n';
  return os.str();
}

inline void write_curve_csv(const std::string& path, const CapacityCurve& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open curve file for writing: " + path);
  os << curve_to_csv(c);
}

inline CapacityCurve parse_curve_csv(const std::string& text, int64_t n_predictions = 0) {
  CapacityCurve c;
  c.n_predictions = n_predictions;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, field, ',');
    c.eval_epochs.push_back(std::stoi(field));
    std::getline(ls, field, ',');
    c.accuracy.push_back(std::stod(field));
    std::getline(ls, field, ',');
    c.mac.push_back(std::stoll(field));
    std::getline(ls, field, ',');
    c.loss.push_back(std::stod(field));
  }
  return c;
}

inline CapacityCurve read_curve_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open curve file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_curve_csv(ss.str());
}

}  // namespace kgmem
