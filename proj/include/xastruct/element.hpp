#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace xastruct {

/// A chemical element identified by atomic number (1..118).
class Element {
 public:
  /// Throws Error(kParse) for atomic numbers outside [1, 118].
  explicit Element(int atomic_number);

  /// Looks up a symbol such as "Cu"; throws Error(kParse) if unknown.
  static Element FromSymbol(std::string_view symbol);

  int atomic_number() const noexcept { return z_; }
  std::string_view symbol() const noexcept;

  friend auto operator<=>(const Element&, const Element&) = default;

 private:
  int z_;
};

inline constexpr int kMaxAtomicNumber = 118;

}  // namespace xastruct
