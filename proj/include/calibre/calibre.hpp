#pragma once

#include "calibre/calibrate.hpp"
#include "calibre/config.hpp"
#include "calibre/io.hpp"
#include "calibre/lof.hpp"
#include "calibre/metrics.hpp"
#include "calibre/pipeline.hpp"
#include "calibre/rng.hpp"
#include "calibre/sample.hpp"
#include "calibre/serialize.hpp"
#include "calibre/simulate.hpp"
#include "calibre/theory.hpp"
#include "calibre/train.hpp"
#include "calibre/types.hpp"
