#include "edras/common.hpp"

#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace edras {
namespace {

WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return sink;
}

bool& verbose_flag() {
  static bool v = false;
  return v;
}

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) {
  // FNV-1a over the tag keeps derivation stable across platforms.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix(splitmix(master ^ h) + index);
}

void set_warning_sink(WarningSink sink) { warning_sink() = std::move(sink); }

void warn(const std::string& message) {
  if (warning_sink()) warning_sink()(message);
}

void set_verbose(bool verbose) { verbose_flag() = verbose; }

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 1 << 28);
#endif
}

void info(const std::string& message) {
  if (verbose_flag()) std::cerr << message << '\n';
}

}  // namespace edras
