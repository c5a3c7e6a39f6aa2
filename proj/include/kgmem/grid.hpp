#pragma once
// Minimal row-major 2D buffer shared by the tokenizer, model and trainer.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace kgmem {

template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Grid: negative shape");
  }

  T& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  T* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const T* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return data.size(); }

  bool operator==(const Grid& o) const { return rows == o.rows && cols == o.cols && data == o.data; }
};

}  // namespace kgmem
