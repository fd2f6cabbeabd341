#pragma once

#include "sslab/attention.hpp"
#include "sslab/corpus.hpp"
#include "sslab/csv.hpp"
#include "sslab/error.hpp"
#include "sslab/evaluation.hpp"
#include "sslab/json_writer.hpp"
#include "sslab/lexical.hpp"
#include "sslab/matrix.hpp"
#include "sslab/metrics.hpp"
#include "sslab/model.hpp"
#include "sslab/pipeline.hpp"
#include "sslab/rng.hpp"
#include "sslab/text.hpp"
#include "sslab/unicode.hpp"
