#ifndef ADFSDCA_ADFSDCA_HPP
#define ADFSDCA_ADFSDCA_HPP

#include "adfsdca/data.hpp"
#include "adfsdca/loss.hpp"
#include "adfsdca/probability.hpp"
#include "adfsdca/rng.hpp"
#include "adfsdca/sampler.hpp"
#include "adfsdca/solver.hpp"
#include "adfsdca/trace_io.hpp"

#endif
