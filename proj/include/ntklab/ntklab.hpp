#pragma once

#include "ntklab/activation.hpp"
#include "ntklab/dataset.hpp"
#include "ntklab/empirical_ntk.hpp"
#include "ntklab/errors.hpp"
#include "ntklab/lab.hpp"
#include "ntklab/linalg.hpp"
#include "ntklab/meanfield.hpp"
#include "ntklab/mlp.hpp"
#include "ntklab/ntk_theory.hpp"
#include "ntklab/parallel.hpp"
#include "ntklab/quadrature.hpp"
#include "ntklab/random.hpp"
#include "ntklab/records.hpp"
#include "ntklab/stats.hpp"
#include "ntklab/training.hpp"
