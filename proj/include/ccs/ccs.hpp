#pragma once

#include "ccs/common.hpp"
#include "ccs/world.hpp"
#include "ccs/agent.hpp"
#include "ccs/bottleneck.hpp"
#include "ccs/reconstruct.hpp"
#include "ccs/remote.hpp"
#include "ccs/reward.hpp"
#include "ccs/grpo.hpp"
#include "ccs/scenarios.hpp"
#include "ccs/io.hpp"
#include "ccs/harness.hpp"
