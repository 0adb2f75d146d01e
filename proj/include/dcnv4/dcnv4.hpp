#pragma once

#include "dcnv4/error.hpp"
#include "dcnv4/half.hpp"
#include "dcnv4/tensor.hpp"
#include "dcnv4/fixture.hpp"
#include "dcnv4/parallel.hpp"
#include "dcnv4/reference.hpp"
#include "dcnv4/gradcheck.hpp"
#include "dcnv4/optimized.hpp"
#include "dcnv4/baselines.hpp"
#include "dcnv4/roofline.hpp"
#include "dcnv4/module.hpp"
#include "dcnv4/bench.hpp"
#include "dcnv4/verify.hpp"
#include "dcnv4/golden.hpp"
