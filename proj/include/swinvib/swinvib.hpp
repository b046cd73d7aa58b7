#pragma once

#include "swinvib/binary_io.hpp"
#include "swinvib/corpus.hpp"
#include "swinvib/error.hpp"
#include "swinvib/feature_store.hpp"
#include "swinvib/filter_pipeline.hpp"
#include "swinvib/metrics.hpp"
#include "swinvib/sweep.hpp"
#include "swinvib/synthetic.hpp"
#include "swinvib/theory_sim.hpp"
#include "swinvib/trainer.hpp"
#include "swinvib/uncertainty_math.hpp"
#include "swinvib/vib.hpp"
#include "swinvib/windowing.hpp"
