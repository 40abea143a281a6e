#pragma once

#include <compare>
#include <limits>
#include <ostream>
#include <string>

namespace fbsvi {

/// Real number extended by -inf and +inf.
///
/// The infinities are carried as an explicit tag; the payload of an infinite
/// value is always zero so no IEEE infinity ever reaches arithmetic code.
/// Addition uses the lower (inf-) convention, (-inf) + (+inf) = -inf, which is
/// the convention under which liminf of a sum dominates the sum of liminfs.
class ExtendedReal {
public:
    enum class Tag { NegInf, Finite, PosInf };

    constexpr ExtendedReal() = default;
    constexpr ExtendedReal(double v) : tag_(Tag::Finite), value_(v) {}  // NOLINT

    static constexpr ExtendedReal neg_inf() { return ExtendedReal(Tag::NegInf); }
    static constexpr ExtendedReal pos_inf() { return ExtendedReal(Tag::PosInf); }

    constexpr Tag tag() const { return tag_; }
    constexpr bool is_finite() const { return tag_ == Tag::Finite; }
    constexpr bool is_neg_inf() const { return tag_ == Tag::NegInf; }
    constexpr bool is_pos_inf() const { return tag_ == Tag::PosInf; }

    /// Finite payload; zero for infinite values.
    constexpr double value() const { return value_; }

    /// Conversion for reporting only (maps the tags to IEEE infinities).
    double to_double() const {
        switch (tag_) {
            case Tag::NegInf: return -std::numeric_limits<double>::infinity();
            case Tag::PosInf: return std::numeric_limits<double>::infinity();
            default: return value_;
        }
    }

    constexpr ExtendedReal operator-() const {
        switch (tag_) {
            case Tag::NegInf: return pos_inf();
            case Tag::PosInf: return neg_inf();
            default: return ExtendedReal(-value_);
        }
    }

    friend constexpr ExtendedReal operator+(ExtendedReal a, ExtendedReal b) {
        if (a.is_neg_inf() || b.is_neg_inf()) return neg_inf();
        if (a.is_pos_inf() || b.is_pos_inf()) return pos_inf();
        return ExtendedReal(a.value_ + b.value_);
    }

    friend constexpr ExtendedReal operator-(ExtendedReal a, ExtendedReal b) { return a + (-b); }

    /// Scaling by a finite real; 0 * (+-inf) = 0.
    friend constexpr ExtendedReal operator*(double s, ExtendedReal a) {
        if (a.is_finite()) return ExtendedReal(s * a.value_);
        if (s == 0.0) return ExtendedReal(0.0);
        return (s > 0.0) == a.is_pos_inf() ? pos_inf() : neg_inf();
    }

    friend constexpr std::strong_ordering operator<=>(ExtendedReal a, ExtendedReal b) {
        const auto rank = [](Tag t) { return t == Tag::NegInf ? 0 : (t == Tag::Finite ? 1 : 2); };
        if (a.tag_ != b.tag_) return rank(a.tag_) <=> rank(b.tag_);
        if (!a.is_finite()) return std::strong_ordering::equal;
        if (a.value_ < b.value_) return std::strong_ordering::less;
        if (a.value_ > b.value_) return std::strong_ordering::greater;
        return std::strong_ordering::equal;
    }

    friend constexpr bool operator==(ExtendedReal a, ExtendedReal b) {
        return (a <=> b) == std::strong_ordering::equal;
    }

    std::string to_string() const {
        switch (tag_) {
            case Tag::NegInf: return "-inf";
            case Tag::PosInf: return "+inf";
            default: return std::to_string(value_);
        }
    }

    friend std::ostream& operator<<(std::ostream& os, ExtendedReal a) { return os << a.to_string(); }

private:
    explicit constexpr ExtendedReal(Tag t) : tag_(t), value_(0.0) {}

    Tag tag_ = Tag::Finite;
    double value_ = 0.0;
};

inline constexpr ExtendedReal min(ExtendedReal a, ExtendedReal b) { return b < a ? b : a; }
inline constexpr ExtendedReal max(ExtendedReal a, ExtendedReal b) { return a < b ? b : a; }

}  // namespace fbsvi
