#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qtc {

struct TokenSequence {
    std::vector<std::string> tokens;
    std::string lang;

    bool empty() const { return tokens.empty(); }
    size_t size() const { return tokens.size(); }
};

namespace utf8 {

inline void append(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Malformed bytes decode to U+FFFD, one per offending byte.
inline std::vector<uint32_t> decode(const std::string& s) {
    std::vector<uint32_t> cps;
    size_t i = 0;
    const auto bad = [&]() { cps.push_back(0xFFFD); ++i; };
    while (i < s.size()) {
        const unsigned char b0 = static_cast<unsigned char>(s[i]);
        size_t need = 0;
        uint32_t cp = 0;
        if (b0 < 0x80) {
            cps.push_back(b0);
            ++i;
            continue;
        } else if ((b0 & 0xE0) == 0xC0) {
            need = 1;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            need = 2;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            need = 3;
            cp = b0 & 0x07;
        } else {
            bad();
            continue;
        }
        if (i + need >= s.size()) {
            bad();
            continue;
        }
        bool ok = true;
        for (size_t k = 1; k <= need; ++k) {
            const unsigned char bk = static_cast<unsigned char>(s[i + k]);
            if ((bk & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (bk & 0x3F);
        }
        if (!ok) {
            bad();
            continue;
        }
        cps.push_back(cp);
        i += need + 1;
    }
    return cps;
}

inline std::string encode(const std::vector<uint32_t>& cps) {
    std::string out;
    for (uint32_t cp : cps) append(out, cp);
    return out;
}

}  // namespace utf8

namespace detail {

// Canonical composition for the base+combining-mark pairs that occur in this
// domain (Latin-1 precomposed letters plus Cyrillic short-i and yo). Full
// Unicode NFC tables are out of scope; see README for the covered set.
inline uint32_t compose_pair(uint32_t base, uint32_t mark) {
    struct Entry {
        uint32_t base, mark, composed;
    };
    static const Entry table[] = {
        {'a', 0x300, 0xE0}, {'a', 0x301, 0xE1}, {'a', 0x302, 0xE2}, {'a', 0x303, 0xE3},
        {'a', 0x308, 0xE4}, {'a', 0x30A, 0xE5}, {'c', 0x327, 0xE7}, {'e', 0x300, 0xE8},
        {'e', 0x301, 0xE9}, {'e', 0x302, 0xEA}, {'e', 0x308, 0xEB}, {'i', 0x300, 0xEC},
        {'i', 0x301, 0xED}, {'i', 0x302, 0xEE}, {'i', 0x308, 0xEF}, {'n', 0x303, 0xF1},
        {'o', 0x300, 0xF2}, {'o', 0x301, 0xF3}, {'o', 0x302, 0xF4}, {'o', 0x303, 0xF5},
        {'o', 0x308, 0xF6}, {'u', 0x300, 0xF9}, {'u', 0x301, 0xFA}, {'u', 0x302, 0xFB},
        {'u', 0x308, 0xFC}, {'y', 0x301, 0xFD}, {'y', 0x308, 0xFF},
        {'A', 0x300, 0xC0}, {'A', 0x301, 0xC1}, {'A', 0x302, 0xC2}, {'A', 0x303, 0xC3},
        {'A', 0x308, 0xC4}, {'A', 0x30A, 0xC5}, {'C', 0x327, 0xC7}, {'E', 0x300, 0xC8},
        {'E', 0x301, 0xC9}, {'E', 0x302, 0xCA}, {'E', 0x308, 0xCB}, {'I', 0x300, 0xCC},
        {'I', 0x301, 0xCD}, {'I', 0x302, 0xCE}, {'I', 0x308, 0xCF}, {'N', 0x303, 0xD1},
        {'O', 0x300, 0xD2}, {'O', 0x301, 0xD3}, {'O', 0x302, 0xD4}, {'O', 0x303, 0xD5},
        {'O', 0x308, 0xD6}, {'U', 0x300, 0xD9}, {'U', 0x301, 0xDA}, {'U', 0x302, 0xDB},
        {'U', 0x308, 0xDC}, {'Y', 0x301, 0xDD},
        {0x438, 0x306, 0x439}, {0x418, 0x306, 0x419},  // и + breve  -> й
        {0x435, 0x308, 0x451}, {0x415, 0x308, 0x401},  // е + diaeresis -> ё
    };
    for (const Entry& e : table) {
        if (e.base == base && e.mark == mark) return e.composed;
    }
    return 0;
}

inline std::vector<uint32_t> nfc(const std::vector<uint32_t>& cps) {
    std::vector<uint32_t> out;
    out.reserve(cps.size());
    for (uint32_t cp : cps) {
        if (!out.empty()) {
            const uint32_t composed = compose_pair(out.back(), cp);
            if (composed != 0) {
                out.back() = composed;
                continue;
            }
        }
        out.push_back(cp);
    }
    return out;
}

inline uint32_t to_lower(uint32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;   // Latin-1
    if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;               // Cyrillic А..Я
    if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;               // Ѐ..Џ incl. Ё
    return cp;
}

inline bool is_space(uint32_t cp) {
    switch (cp) {
        case ' ': case '\t': case '\n': case '\r': case '\v': case '\f':
        case 0xA0: case 0x1680: case 0x2028: case 0x2029: case 0x202F:
        case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

inline bool is_punct(uint32_t cp) {
    if (cp < 0x80) {
        return (cp >= '!' && cp <= '/') || (cp >= ':' && cp <= '@') ||
               (cp >= '[' && cp <= '`') || (cp >= '{' && cp <= '~');
    }
    switch (cp) {
        case 0xA1: case 0xAB: case 0xB7: case 0xBB: case 0xBF:
        case 0x2026: case 0x3001: case 0x3002: case 0x300A: case 0x300B:
        case 0xFF01: case 0xFF0C: case 0xFF0E: case 0xFF1A: case 0xFF1B: case 0xFF1F:
            return true;
        default:
            return (cp >= 0x2010 && cp <= 0x2015) || (cp >= 0x2018 && cp <= 0x201F);
    }
}

}  // namespace detail

// Lowercases, splits punctuation into single-codepoint tokens, collapses
// whitespace. Applies the NFC-lite composition above first. Empty or
// whitespace-only input yields an empty sequence.
inline TokenSequence tokenize(const std::string& text, const std::string& lang) {
    TokenSequence seq;
    seq.lang = lang;
    const std::vector<uint32_t> cps = detail::nfc(utf8::decode(text));
    std::string cur;
    const auto flush = [&]() {
        if (!cur.empty()) {
            seq.tokens.push_back(cur);
            cur.clear();
        }
    };
    for (uint32_t cp : cps) {
        if (detail::is_space(cp)) {
            flush();
        } else if (detail::is_punct(cp)) {
            flush();
            std::string p;
            utf8::append(p, cp);
            seq.tokens.push_back(p);
        } else {
            utf8::append(cur, detail::to_lower(cp));
        }
    }
    flush();
    return seq;
}

}  // namespace qtc
