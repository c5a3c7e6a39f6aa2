#pragma once
// Umbrella header for the kgmem library.

#include "kgmem/datagen.hpp"
#include "kgmem/experiment.hpp"
#include "kgmem/graph.hpp"
#include "kgmem/grid.hpp"
#include "kgmem/model.hpp"
#include "kgmem/report.hpp"
#include "kgmem/rng.hpp"
#include "kgmem/tokenizer.hpp"
#include "kgmem/trainer.hpp"
