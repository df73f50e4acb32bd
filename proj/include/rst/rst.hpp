#pragma once

#include "rst/checkpoint.hpp"
#include "rst/corpus_io.hpp"
#include "rst/data.hpp"
#include "rst/encoder.hpp"
#include "rst/evaluate.hpp"
#include "rst/graph.hpp"
#include "rst/losses.hpp"
#include "rst/metrics.hpp"
#include "rst/model.hpp"
#include "rst/optim.hpp"
#include "rst/run_io.hpp"
#include "rst/selftrain.hpp"
#include "rst/synthetic.hpp"
#include "rst/vocab.hpp"
