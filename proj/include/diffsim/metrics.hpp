#pragma once
// Append-only metrics CSV. Doubles are printed with %.17g so identical runs
// produce identical bytes.

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include "algo.hpp"

namespace diffsim::metrics {

inline const char* kCsvHeader =
    "iteration,env_steps,return_mean,return_std,entropy_mean,alpha,"
    "actor_loss,critic_loss,seconds";

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string format_row(const algo::IterationStats& s) {
  std::string row = std::to_string(s.iteration);
  row += ',' + std::to_string(s.env_steps);
  row += ',' + format_double(s.return_mean);
  row += ',' + format_double(s.return_std);
  row += ',' + format_double(s.entropy_mean);
  row += ',' + format_double(s.alpha);
  row += ',' + format_double(s.actor_loss);
  row += ',' + format_double(s.critic_loss);
  row += ',' + format_double(s.seconds);
  return row;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, bool append) {
    bool need_header = true;
    if (append) {
      std::ifstream probe(path);
      need_header = !probe || probe.peek() == std::ifstream::traits_type::eof();
    }
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open metrics file: " + path);
    if (need_header) out_ << kCsvHeader << '\n';
  }

  void append(const algo::IterationStats& s) {
    out_ << format_row(s) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace diffsim::metrics
