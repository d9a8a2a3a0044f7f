#pragma once

#include "ftbc/ann.hpp"
#include "ftbc/calibrate.hpp"
#include "ftbc/config.hpp"
#include "ftbc/convert.hpp"
#include "ftbc/dataset.hpp"
#include "ftbc/error.hpp"
#include "ftbc/evaluate.hpp"
#include "ftbc/harness.hpp"
#include "ftbc/idx.hpp"
#include "ftbc/model_io.hpp"
#include "ftbc/pipeline.hpp"
#include "ftbc/report.hpp"
#include "ftbc/snn.hpp"
#include "ftbc/tensor.hpp"
