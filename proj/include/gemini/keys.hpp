#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace gemini {

/// Symbolic key names accepted in schemes: a-z, 0-9, named keys, f1-f12
/// and arrows.
inline const std::vector<std::string>& key_table() {
    static const std::vector<std::string> table = [] {
        std::vector<std::string> t;
        for (char c = 'a'; c <= 'z'; ++c) t.emplace_back(1, c);
        for (char c = '0'; c <= '9'; ++c) t.emplace_back(1, c);
        for (const char* k : {"enter", "tab", "escape", "alt", "shift", "ctrl", "up", "down", "left", "right"})
            t.emplace_back(k);
        for (int i = 1; i <= 12; ++i) t.push_back("f" + std::to_string(i));
        return t;
    }();
    return table;
}

inline bool is_key(std::string_view name) {
    for (const auto& k : key_table())
        if (k == name) return true;
    return false;
}

inline bool is_mouse_button(std::string_view name) {
    return name == "mouse_left" || name == "mouse_right" || name == "mouse_middle";
}

}  // namespace gemini
