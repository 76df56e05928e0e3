#pragma once

#include <span>
#include <string>

namespace overtrain {

/// Shortest round-trip decimal form; "inf", "-inf" and "nan" for non-finite values.
std::string format_double(double value);

/// "(a,b,c)" with each entry in format_double form.
std::string format_list(std::span<const double> values);

}  // namespace overtrain
