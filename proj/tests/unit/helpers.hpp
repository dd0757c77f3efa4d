#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "doctest.h"

namespace vip::test {

/// Fresh scratch directory under VIP_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch(const std::string& name) {
  const char* base = std::getenv("VIP_TEST_TMP");
  auto dir = (base && *base ? std::filesystem::path(base)
                            : std::filesystem::temp_directory_path() / "vip_tests") /
             name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace vip::test
