#pragma once

#include "trasend/adam.hpp"
#include "trasend/common.hpp"
#include "trasend/dataset.hpp"
#include "trasend/gradcheck.hpp"
#include "trasend/io.hpp"
#include "trasend/metrics.hpp"
#include "trasend/model.hpp"
#include "trasend/ops.hpp"
#include "trasend/params.hpp"
#include "trasend/personalize.hpp"
#include "trasend/preprocess.hpp"
#include "trasend/synthetic.hpp"
#include "trasend/tape.hpp"
#include "trasend/tensor.hpp"
#include "trasend/train.hpp"
