// io.hpp
//
// CSV datasets (header y,x1,...,xp) and shortest round-trip number formatting.

#ifndef MEMQUANT_IO_HPP
#define MEMQUANT_IO_HPP

#include "memquant/core.hpp"

#include <iosfwd>
#include <string>

namespace memquant {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Reads the whole file. Throws Parse with the line number on malformed rows.
Batch read_dataset(std::istream& in);
Batch read_dataset_file(const std::string& path);

void write_dataset(std::ostream& out, const Batch& data);

/// Row-at-a-time reader for replaying a stream without loading it.
class DatasetReader {
 public:
  explicit DatasetReader(std::istream& in);

  int covariates() const noexcept { return p_; }
  /// False at end of input.
  bool next(Observation& obs);
  int line() const noexcept { return line_; }

 private:
  std::istream& in_;
  int p_ = 0;
  int line_ = 0;
  std::string buffer_;
};

}  // namespace memquant

#endif  // MEMQUANT_IO_HPP
