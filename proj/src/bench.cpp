#include "hsm/bench.hpp"

#include <cstdio>

namespace hsm {

std::string bench_csv(const BenchReport& report) {
  std::string out = std::string(kBenchCsvHeader) + "\n";
  char buf[128];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), ",%d,%.9g,%d\n", r.time, r.median_seconds, r.iterations);
    out += r.label + buf;
  }
  return out;
}

}  // namespace hsm
