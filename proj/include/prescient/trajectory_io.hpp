#pragma once

#include "prescient/trajectory.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace prescient {

// CSV layout: header `t,<channel1>,<channel2>,...`, one row per sample,
// seconds and SI units, '.' decimal separator. CRLF and LF are both accepted.

// A last header column named `tag_header` is read as strings into `tags`
// (skipped when `tags` is null).
Trajectory parse_csv(std::istream& in, const std::string& source = "<stream>",
                     std::vector<std::string>* tags = nullptr, const std::string& tag_header = "provenance");
Trajectory load_csv(const std::filesystem::path& path, std::vector<std::string>* tags = nullptr,
                    const std::string& tag_header = "provenance");

/// Writes with 17 significant digits so a load reproduces every double.
/// A non-empty `tags` adds a trailing string column named `tag_header`.
void write_csv(std::ostream& out, const Trajectory& traj,
               const std::vector<std::string>& tags = {},
               const std::string& tag_header = "provenance");
void save_csv(const Trajectory& traj, const std::filesystem::path& path,
              const std::vector<std::string>& tags = {},
              const std::string& tag_header = "provenance");

}  // namespace prescient
