#pragma once

#include "orthofactor/config.hpp"
#include "orthofactor/csv.hpp"
#include "orthofactor/diagnostics.hpp"
#include "orthofactor/errors.hpp"
#include "orthofactor/linalg.hpp"
#include "orthofactor/map_explorer.hpp"
#include "orthofactor/model.hpp"
#include "orthofactor/pipeline.hpp"
#include "orthofactor/rng.hpp"
#include "orthofactor/sampler_ghosh_dunson.hpp"
#include "orthofactor/sampler_normal.hpp"
#include "orthofactor/sampler_orthonormal.hpp"
#include "orthofactor/special.hpp"
#include "orthofactor/trace.hpp"
