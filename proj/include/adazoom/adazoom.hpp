#pragma once

#include "adazoom/checkpoint.hpp"
#include "adazoom/config.hpp"
#include "adazoom/detector.hpp"
#include "adazoom/env.hpp"
#include "adazoom/geometry.hpp"
#include "adazoom/metrics.hpp"
#include "adazoom/parallel.hpp"
#include "adazoom/policy.hpp"
#include "adazoom/rng.hpp"
#include "adazoom/rollout.hpp"
#include "adazoom/scene.hpp"
#include "adazoom/training.hpp"
