#pragma once

#include "adatok/baselines.hpp"
#include "adatok/cost_model.hpp"
#include "adatok/errors.hpp"
#include "adatok/fixtures.hpp"
#include "adatok/half.hpp"
#include "adatok/mask_pipeline.hpp"
#include "adatok/object_merge.hpp"
#include "adatok/tensor_io.hpp"
#include "adatok/token_wire.hpp"
#include "adatok/transport.hpp"
