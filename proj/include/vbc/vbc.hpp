#pragma once

#include "vbc/core/errors.hpp"
#include "vbc/core/random.hpp"
#include "vbc/core/stats.hpp"
#include "vbc/copula.hpp"
#include "vbc/correction.hpp"
#include "vbc/dataset.hpp"
#include "vbc/evaluation.hpp"
#include "vbc/marginal.hpp"
#include "vbc/pipeline.hpp"
#include "vbc/synthetic.hpp"
#include "vbc/vine.hpp"
