#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace certain {

// Input/configuration problems. The CLI maps these to exit code 2.
struct config_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct parse_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct shape_error : std::runtime_error { using std::runtime_error::runtime_error; };
// Numeric failures (NaN terms, ill-conditioned systems). Exit code 3.
struct numeric_error : std::runtime_error { using std::runtime_error::runtime_error; };

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

// Chunked parallel loop. fn(i) must write only to state owned by index i, so
// results are identical for any thread count. threads <= 1 runs inline.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace certain
