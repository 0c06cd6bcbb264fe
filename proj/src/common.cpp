#include "mtdbn/common.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace mtdbn {

const char* unit_type_name(UnitType t) {
  switch (t) {
    case UnitType::kBinary: return "binary";
    case UnitType::kReal: return "real";
    case UnitType::kCount: return "count";
  }
  return "?";
}

UnitType unit_type_from_name(std::string_view name) {
  if (name == "binary") return UnitType::kBinary;
  if (name == "real") return UnitType::kReal;
  if (name == "count") return UnitType::kCount;
  throw ConfigError("unknown unit type: '" + std::string(name) + "'");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int g_max_threads = 1;

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void set_max_threads(int n) { g_max_threads = n < 1 ? 1 : n; }

int max_threads() { return g_max_threads; }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  const int threads = g_max_threads;
  if (threads <= 1 || n < 2 * threads) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::int64_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mtdbn
