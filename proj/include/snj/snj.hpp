#pragma once

#include "snj/bench.hpp"
#include "snj/error.hpp"
#include "snj/markov.hpp"
#include "snj/reconstruct.hpp"
#include "snj/rng.hpp"
#include "snj/similarity.hpp"
#include "snj/spectral.hpp"
#include "snj/tree.hpp"
#include "snj/tree_gen.hpp"
#include "snj/verify.hpp"
