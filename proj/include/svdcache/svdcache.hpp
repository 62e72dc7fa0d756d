// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "svdcache/analysis.hpp"
#include "svdcache/basis.hpp"
#include "svdcache/denoiser.hpp"
#include "svdcache/engine.hpp"
#include "svdcache/forecast.hpp"
#include "svdcache/io.hpp"
#include "svdcache/linalg.hpp"
#include "svdcache/metrics.hpp"
#include "svdcache/report.hpp"
#include "svdcache/rng.hpp"
#include "svdcache/schedule.hpp"
#include "svdcache/synth.hpp"
#include "svdcache/trajectory.hpp"
