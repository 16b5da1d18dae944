#pragma once

#include <iostream>
#include <string>

namespace refseg::log {

inline void warn(const std::string& msg) { std::cerr << "[warn] " << msg << std::endl; }
inline void info(const std::string& msg) { std::cout << msg << std::endl; }

}  // namespace refseg::log
