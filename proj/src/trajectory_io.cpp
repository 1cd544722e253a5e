#include "prescient/trajectory_io.hpp"

#include "prescient/error.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace prescient {
namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void parse_error(const std::string& source, std::size_t line, const std::string& what) {
  std::ostringstream os;
  os << source << ":" << line << ": " << what;
  fail(ErrorCode::kParse, os.str());
}

}  // namespace

Trajectory parse_csv(std::istream& in, const std::string& source, std::vector<std::string>* tags,
                     const std::string& tag_header) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> names;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  const auto header = split(trim(line), ',');
  if (header.empty() || trim(header[0]) != "t") {
    parse_error(source, line_no, "header must start with 't'");
  }
  for (std::size_t i = 1; i < header.size(); ++i) {
    const auto name = trim(header[i]);
    if (name.empty()) parse_error(source, line_no, "empty channel name in header");
    names.emplace_back(name);
  }
  const bool tagged = !names.empty() && names.back() == tag_header;
  if (tagged) names.pop_back();
  if (names.empty()) parse_error(source, line_no, "header has no channels");
  if (tags) tags->clear();

  std::vector<double> times;
  std::vector<double> flat;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = trim(line);
    if (row.empty()) continue;
    const auto fields = split(row, ',');
    const std::size_t width = names.size() + 1 + (tagged ? 1 : 0);
    if (fields.size() != width) {
      std::ostringstream os;
      os << "row has " << fields.size() << " fields, header has " << width;
      parse_error(source, line_no, os.str());
    }
    if (tagged && tags) tags->emplace_back(trim(fields.back()));
    for (std::size_t i = 0; i < names.size() + 1; ++i) {
      const auto f = trim(fields[i]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        parse_error(source, line_no, "not a number: '" + std::string(f) + "'");
      }
      if (i == 0) {
        if (!times.empty() && !(v > times.back())) {
          parse_error(source, line_no, "timestamps must be strictly increasing");
        }
        times.push_back(v);
      } else {
        flat.push_back(v);
      }
    }
  }
  const auto rows = static_cast<Eigen::Index>(times.size());
  const auto cols = static_cast<Eigen::Index>(names.size());
  Eigen::MatrixXd values(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) values(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  }
  return Trajectory(cartesian_channels(names), std::move(times), std::move(values));
}

Trajectory load_csv(const std::filesystem::path& path, std::vector<std::string>* tags,
                    const std::string& tag_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return parse_csv(in, path.string(), tags, tag_header);
}

void write_csv(std::ostream& out, const Trajectory& traj, const std::vector<std::string>& tags,
               const std::string& tag_header) {
  if (!tags.empty() && tags.size() != traj.size()) {
    fail(ErrorCode::kInvalidArgument, "write_csv: tag column length mismatch");
  }
  out << "t";
  for (const auto& c : traj.channels()) out << ',' << c.name;
  if (!tags.empty()) out << ',' << tag_header;
  out << '\n';
  out << std::setprecision(17);
  const auto& v = traj.values();
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out << traj.times()[i];
    for (Eigen::Index c = 0; c < v.cols(); ++c) out << ',' << v(static_cast<Eigen::Index>(i), c);
    if (!tags.empty()) out << ',' << tags[i];
    out << '\n';
  }
}

void save_csv(const Trajectory& traj, const std::filesystem::path& path,
              const std::vector<std::string>& tags, const std::string& tag_header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  write_csv(out, traj, tags, tag_header);
}

}  // namespace prescient
