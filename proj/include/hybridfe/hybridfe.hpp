#pragma once

#include "hybridfe/error.hpp"
#include "hybridfe/quadrature.hpp"
#include "hybridfe/mesh.hpp"
#include "hybridfe/fespace.hpp"
#include "hybridfe/fields.hpp"
#include "hybridfe/weakops.hpp"
#include "hybridfe/linalg.hpp"
#include "hybridfe/element.hpp"
#include "hybridfe/diffusion.hpp"
#include "hybridfe/biharmonic.hpp"
#include "hybridfe/verify.hpp"
#include "hybridfe/config.hpp"
