#pragma once

#include "xalign/attention.hpp"
#include "xalign/checkpoint.hpp"
#include "xalign/dataset.hpp"
#include "xalign/encoder.hpp"
#include "xalign/errors.hpp"
#include "xalign/fusion.hpp"
#include "xalign/knowledge.hpp"
#include "xalign/lora.hpp"
#include "xalign/metrics.hpp"
#include "xalign/model.hpp"
#include "xalign/numerics.hpp"
#include "xalign/objectives.hpp"
#include "xalign/perturb.hpp"
#include "xalign/pipeline.hpp"
#include "xalign/reasoning.hpp"
#include "xalign/record.hpp"
#include "xalign/text.hpp"
