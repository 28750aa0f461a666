#pragma once

// Convenience header pulling in the whole toolkit.

#include "sedkit/audio.hpp"
#include "sedkit/augment.hpp"
#include "sedkit/binary_io.hpp"
#include "sedkit/config.hpp"
#include "sedkit/error.hpp"
#include "sedkit/fdy_conv.hpp"
#include "sedkit/io.hpp"
#include "sedkit/model.hpp"
#include "sedkit/pipeline.hpp"
#include "sedkit/postproc.hpp"
#include "sedkit/psds.hpp"
#include "sedkit/rng.hpp"
#include "sedkit/selftest.hpp"
#include "sedkit/tensor.hpp"
