#include "memquant/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace memquant {

namespace {

Error parse_error(int line, const std::string& msg) {
  return Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + msg);
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

DatasetReader::DatasetReader(std::istream& in) : in_(in) {
  if (!std::getline(in_, buffer_)) throw Error(ErrorKind::Parse, "dataset is empty");
  line_ = 1;
  strip_cr(buffer_);
  std::vector<std::string> names;
  std::size_t start = 0;
  while (true) {
    const auto comma = buffer_.find(',', start);
    names.push_back(buffer_.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (names.front() != "y") throw parse_error(1, "header must start with y");
  for (std::size_t j = 1; j < names.size(); ++j) {
    if (names[j] != "x" + std::to_string(j)) throw parse_error(1, "expected column x" + std::to_string(j));
  }
  p_ = static_cast<int>(names.size()) - 1;
}

bool DatasetReader::next(Observation& obs) {
  while (std::getline(in_, buffer_)) {
    ++line_;
    strip_cr(buffer_);
    if (buffer_.empty()) continue;
    if (obs.x.size() != p_) obs.x.resize(p_);
    const char* cur = buffer_.data();
    const char* end = cur + buffer_.size();
    for (int j = 0; j <= p_; ++j) {
      double v = 0.0;
      const auto res = std::from_chars(cur, end, v);
      if (res.ec != std::errc()) throw parse_error(line_, "field " + std::to_string(j + 1) + " is not a number");
      if (!std::isfinite(v)) throw parse_error(line_, "non-finite value");
      (j == 0 ? obs.y : obs.x(j - 1)) = v;
      cur = res.ptr;
      if (j < p_) {
        if (cur == end || *cur != ',') throw parse_error(line_, "expected " + std::to_string(p_ + 1) + " fields");
        ++cur;
      }
    }
    if (cur != end) throw parse_error(line_, "expected " + std::to_string(p_ + 1) + " fields");
    return true;
  }
  return false;
}

Batch read_dataset(std::istream& in) {
  DatasetReader reader(in);
  std::vector<double> flat;
  Observation obs;
  const int p = reader.covariates();
  std::int64_t rows = 0;
  while (reader.next(obs)) {
    flat.push_back(obs.y);
    for (int j = 0; j < p; ++j) flat.push_back(obs.x(j));
    ++rows;
  }
  if (rows == 0) throw Error(ErrorKind::Parse, "dataset has no rows");
  const Eigen::Map<const Matrix> table(flat.data(), p + 1, rows);
  const Vector y = table.row(0).transpose();
  const Matrix x = table.bottomRows(p).transpose();
  return Batch::from_covariates(y, x);
}

Batch read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + path);
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const Batch& data) {
  out << 'y';
  for (int j = 1; j <= data.covariates(); ++j) out << ",x" << j;
  out << '\n';
  std::string line;
  for (Eigen::Index i = 0; i < data.design.rows(); ++i) {
    line = format_double(data.y(i));
    for (Eigen::Index j = 1; j < data.design.cols(); ++j) {
      line += ',';
      line += format_double(data.design(i, j));
    }
    line += '\n';
    out << line;
  }
}

}  // namespace memquant
