#pragma once

#include <iostream>
#include <string>

namespace sq {

inline void warn(const std::string& msg) {
  std::cerr << "warning: " << msg << "\n";
}

}  // namespace sq
