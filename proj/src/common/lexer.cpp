#include "honeytrace/common/lexer.hpp"

#include <cctype>
#include <cstdio>

namespace honeytrace {

std::vector<Token> tokenize_line(std::string_view line) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        const char c = line[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '#') break;
        if (c != '"') {
            const std::size_t start = i;
            while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            out.push_back({std::string(line.substr(start, i - start)), false});
            continue;
        }
        ++i;
        std::string text;
        bool closed = false;
        while (i < line.size()) {
            const char q = line[i++];
            if (q == '"') {
                closed = true;
                break;
            }
            if (q != '\\') {
                text.push_back(q);
                continue;
            }
            if (i >= line.size()) throw Error("dangling escape");
            const char e = line[i++];
            switch (e) {
                case 'n': text.push_back('\n'); break;
                case 'r': text.push_back('\r'); break;
                case 't': text.push_back('\t'); break;
                case '0': text.push_back('\0'); break;
                case '\\': text.push_back('\\'); break;
                case '"': text.push_back('"'); break;
                case 'x': {
                    if (i + 2 > line.size() || !std::isxdigit(static_cast<unsigned char>(line[i])) ||
                        !std::isxdigit(static_cast<unsigned char>(line[i + 1])))
                        throw Error("bad \\x escape");
                    text.push_back(static_cast<char>(std::stoi(std::string(line.substr(i, 2)), nullptr, 16)));
                    i += 2;
                    break;
                }
                default: throw Error(std::string("unknown escape \\") + e);
            }
        }
        if (!closed) throw Error("unterminated string");
        out.push_back({std::move(text), true});
    }
    return out;
}

std::string quote(std::string_view raw) {
    std::string out = "\"";
    for (const char c : raw) {
        switch (c) {
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            case '\\': out += "\\\\"; break;
            case '"': out += "\\\""; break;
            default:
                if (std::isprint(static_cast<unsigned char>(c))) {
                    out.push_back(c);
                } else {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\x%02x", static_cast<unsigned char>(c));
                    out += buf;
                }
        }
    }
    out.push_back('"');
    return out;
}

}  // namespace honeytrace
