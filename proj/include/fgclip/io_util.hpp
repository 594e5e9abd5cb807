#pragma once

#include <string>

namespace fgclip {

// All file outputs go through write-then-rename so interrupted runs never
// leave truncated artifacts behind.
void atomic_write_file(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

// Fixed 6-decimal formatting used for normalized coordinates and metric
// values in text outputs.
std::string format6(double v);

// Log verbosity comes from the FGCLIP_LOG environment variable only
// (quiet|info|debug, default info).
enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };
LogLevel log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace fgclip
