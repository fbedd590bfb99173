#pragma once

#include "stindex/analytics.hpp"
#include "stindex/error.hpp"
#include "stindex/evaluation.hpp"
#include "stindex/extraction.hpp"
#include "stindex/geo.hpp"
#include "stindex/ingest.hpp"
#include "stindex/json_io.hpp"
#include "stindex/llm.hpp"
#include "stindex/schema.hpp"
#include "stindex/store.hpp"
#include "stindex/temporal.hpp"
#include "stindex/text.hpp"
