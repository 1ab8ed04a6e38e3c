#pragma once

#include "dosegp/cohort.hpp"
#include "dosegp/config.hpp"
#include "dosegp/csv.hpp"
#include "dosegp/decision.hpp"
#include "dosegp/errors.hpp"
#include "dosegp/gp.hpp"
#include "dosegp/model_store.hpp"
#include "dosegp/outcome.hpp"
#include "dosegp/pipeline.hpp"
#include "dosegp/predictor.hpp"
#include "dosegp/propagation.hpp"
#include "dosegp/synthetic.hpp"
#include "dosegp/transition.hpp"
