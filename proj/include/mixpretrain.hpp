#pragma once

#include "mixpretrain/errors.hpp"
#include "mixpretrain/tensor.hpp"
#include "mixpretrain/autograd.hpp"
#include "mixpretrain/params.hpp"
#include "mixpretrain/data.hpp"
#include "mixpretrain/tokenize.hpp"
#include "mixpretrain/attention.hpp"
#include "mixpretrain/fusion.hpp"
#include "mixpretrain/objectives.hpp"
#include "mixpretrain/decoder.hpp"
#include "mixpretrain/heads.hpp"
#include "mixpretrain/metrics.hpp"
#include "mixpretrain/model.hpp"
#include "mixpretrain/config.hpp"
#include "mixpretrain/checkpoint.hpp"
#include "mixpretrain/trainer.hpp"
