#pragma once

#include "calibre/types.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace calibre {

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view tok, const std::string& path, std::size_t line_no) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw io_error(path + ":" + std::to_string(line_no) + ": malformed number '" +
                   std::string(tok) + "'");
  if (!std::isfinite(v))
    throw io_error(path + ":" + std::to_string(line_no) + ": non-finite value '" +
                   std::string(tok) + "'");
  return v;
}

inline long parse_long(std::string_view tok, const std::string& path, std::size_t line_no) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw io_error(path + ":" + std::to_string(line_no) + ": malformed integer '" +
                   std::string(tok) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Reads the CSV embedding format: one header line `m=<dim>,K=<classes>`,
/// then one `label,v0,...,v{m-1}` line per instance. Every malformed input is
/// reported with its line number.
inline LabeledEmbeddings load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path + ": cannot open for reading");

  std::string raw;
  if (!std::getline(in, raw)) throw io_error(path + ":1: missing header line");
  const std::string_view header = detail::strip_cr(raw);

  LabeledEmbeddings data;
  {
    const auto fields = detail::split_csv(header);
    if (fields.size() != 2 || fields[0].substr(0, 2) != "m=" || fields[1].substr(0, 2) != "K=")
      throw io_error(path + ":1: malformed header, expected m=<dim>,K=<classes>");
    data.dim = detail::parse_long(fields[0].substr(2), path, 1);
    data.num_classes = detail::parse_long(fields[1].substr(2), path, 1);
    if (data.dim < 1) throw io_error(path + ":1: dim must be >= 1");
    if (data.num_classes < 1) throw io_error(path + ":1: K must be >= 1");
  }

  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::strip_cr(raw);
    if (line.empty()) continue;
    const auto fields = detail::split_csv(line);
    if (static_cast<Index>(fields.size()) != data.dim + 1)
      throw io_error(path + ":" + std::to_string(line_no) + ": expected " +
                     std::to_string(data.dim + 1) + " fields, got " +
                     std::to_string(fields.size()));
    const long label = detail::parse_long(fields[0], path, line_no);
    if (label < 0 || label >= data.num_classes)
      throw io_error(path + ":" + std::to_string(line_no) + ": label " + std::to_string(label) +
                     " out of range [0," + std::to_string(data.num_classes) + ")");
    data.labels.push_back(static_cast<int>(label));
    for (std::size_t j = 1; j < fields.size(); ++j)
      values.push_back(detail::parse_double(fields[j], path, line_no));
  }
  if (data.labels.empty()) throw io_error(path + ": no data rows (n >= 1 required)");

  const Index n = static_cast<Index>(data.labels.size());
  data.vectors.resize(n, data.dim);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < data.dim; ++j)
      data.vectors(i, j) = values[static_cast<std::size_t>(i * data.dim + j)];
  data.validate();
  return data;
}

/// Writes the CSV embedding format. Floats are serialized with 17 significant
/// digits so a round trip reproduces values exactly.
inline void save_embeddings(const LabeledEmbeddings& data, const std::string& path) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw io_error(path + ": cannot open for writing");
  out << "m=" << data.dim << ",K=" << data.num_classes << "\n";
  for (Index i = 0; i < data.size(); ++i) {
    out << data.labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < data.dim; ++j) out << ',' << detail::format_double(data.vectors(i, j));
    out << "\n";
  }
  if (!out) throw io_error(path + ": write failed");
}

}  // namespace calibre
