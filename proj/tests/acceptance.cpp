#include "swcl/verify.hpp"
#include "swcl/pipeline.hpp"
#include <gtest/gtest.h>
