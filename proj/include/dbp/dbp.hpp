#pragma once

#include "dbp/activations.hpp"
#include "dbp/bilinear.hpp"
#include "dbp/double_backprop.hpp"
#include "dbp/experiments.hpp"
#include "dbp/jacobian_frobenius.hpp"
#include "dbp/network.hpp"
#include "dbp/oracle.hpp"
#include "dbp/penalty.hpp"
#include "dbp/rng.hpp"
#include "dbp/tensor.hpp"
