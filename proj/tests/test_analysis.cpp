#include <catch2/catch_amalgamated.hpp>
#include "mfglq/mfglq.hpp"

TEST_CASE("placeholder") { CHECK(true); }
