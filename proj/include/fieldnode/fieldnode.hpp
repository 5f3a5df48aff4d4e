#pragma once

#include "fieldnode/agent.hpp"
#include "fieldnode/autodiff.hpp"
#include "fieldnode/behavior.hpp"
#include "fieldnode/checkpoint.hpp"
#include "fieldnode/config.hpp"
#include "fieldnode/delay.hpp"
#include "fieldnode/encoder.hpp"
#include "fieldnode/env.hpp"
#include "fieldnode/errors.hpp"
#include "fieldnode/harness.hpp"
#include "fieldnode/heads.hpp"
#include "fieldnode/model_config.hpp"
#include "fieldnode/nn.hpp"
#include "fieldnode/optim.hpp"
#include "fieldnode/partition.hpp"
#include "fieldnode/plots.hpp"
#include "fieldnode/replay.hpp"
#include "fieldnode/ssm.hpp"
#include "fieldnode/trace.hpp"
#include "fieldnode/trainer.hpp"
#include "fieldnode/world_model.hpp"
