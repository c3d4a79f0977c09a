#pragma once

#include "fmiseg/numerics/archive.hpp"
#include "fmiseg/numerics/grad_check.hpp"
#include "fmiseg/numerics/ops.hpp"
#include "fmiseg/numerics/tape.hpp"
#include "fmiseg/wavelet.hpp"
#include "fmiseg/nn.hpp"
#include "fmiseg/attention.hpp"
#include "fmiseg/encoders.hpp"
#include "fmiseg/fusion.hpp"
#include "fmiseg/segmodel.hpp"
#include "fmiseg/harness/ablate.hpp"
#include "fmiseg/harness/checkpoint.hpp"
#include "fmiseg/harness/config_io.hpp"
#include "fmiseg/harness/dataset.hpp"
#include "fmiseg/harness/metrics.hpp"
#include "fmiseg/harness/optim.hpp"
#include "fmiseg/harness/schedule.hpp"
#include "fmiseg/harness/synth.hpp"
#include "fmiseg/harness/train.hpp"
