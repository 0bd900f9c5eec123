#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "ntp/dsl.hpp"

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ntp::Program bundled(const std::string& name) {
  return ntp::parse_program(read_text(std::string(NTP_PROGRAMS_DIR) + "/" + name));
}

inline ntp::AlternatingWord bundled_word(const std::string& name) {
  return ntp::parse_word(read_text(std::string(NTP_PROGRAMS_DIR) + "/" + name));
}
