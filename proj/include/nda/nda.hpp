#pragma once

#include "nda/config.hpp"
#include "nda/dataset.hpp"
#include "nda/discriminant.hpp"
#include "nda/errors.hpp"
#include "nda/gradcheck.hpp"
#include "nda/graph.hpp"
#include "nda/losses.hpp"
#include "nda/model.hpp"
#include "nda/ood.hpp"
#include "nda/optim.hpp"
#include "nda/reports.hpp"
#include "nda/rng.hpp"
#include "nda/ssl.hpp"
#include "nda/tensor.hpp"
#include "nda/textio.hpp"
#include "nda/train.hpp"
#include "nda/warnings.hpp"
