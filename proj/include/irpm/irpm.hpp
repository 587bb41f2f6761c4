#pragma once

#include "irpm/config.hpp"
#include "irpm/evaluation.hpp"
#include "irpm/grpo.hpp"
#include "irpm/policy.hpp"
#include "irpm/preference_data.hpp"
#include "irpm/reward_engine.hpp"
#include "irpm/rng.hpp"
#include "irpm/student_t.hpp"
#include "irpm/training.hpp"
