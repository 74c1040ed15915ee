#pragma once

// Umbrella header.

#include "ssflab/errors.hpp"
#include "ssflab/io.hpp"
#include "ssflab/parallel.hpp"
#include "ssflab/quadrature.hpp"
#include "ssflab/linalg.hpp"
#include "ssflab/model.hpp"
#include "ssflab/config.hpp"
#include "ssflab/bloch.hpp"
#include "ssflab/dos.hpp"
#include "ssflab/coeffs.hpp"
#include "ssflab/boxdisc.hpp"
#include "ssflab/effham.hpp"
#include "ssflab/limabs.hpp"
#include "ssflab/harness.hpp"
