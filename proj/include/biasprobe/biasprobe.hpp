#pragma once

#include "biasprobe/attention.hpp"
#include "biasprobe/common.hpp"
#include "biasprobe/dataset.hpp"
#include "biasprobe/http_backend.hpp"
#include "biasprobe/llm_client.hpp"
#include "biasprobe/metrics.hpp"
#include "biasprobe/prompt.hpp"
#include "biasprobe/runner.hpp"
#include "biasprobe/scoring.hpp"
