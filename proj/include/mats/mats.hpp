#ifndef MATS_MATS_HPP_
#define MATS_MATS_HPP_

#include "mats/algorithms.hpp"
#include "mats/data.hpp"
#include "mats/diffnet.hpp"
#include "mats/env.hpp"
#include "mats/evalharness.hpp"
#include "mats/fisher.hpp"
#include "mats/policies.hpp"
#include "mats/simnet.hpp"

#endif  // MATS_MATS_HPP_
