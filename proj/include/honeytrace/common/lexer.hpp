#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "honeytrace/common/types.hpp"

namespace honeytrace {

struct Token {
    std::string text;
    bool quoted = false;
};

/// Splits one line of the project's line-oriented file formats into tokens.
/// Whitespace separates tokens; `#` outside quotes starts a comment; double-quoted tokens
/// accept the escapes \n \r \t \0 \\ \" and \xHH.
std::vector<Token> tokenize_line(std::string_view line);

/// Inverse of the quoted-token escaping, for writing files the tokenizer reads back.
std::string quote(std::string_view raw);

class ParseError : public Error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

}  // namespace honeytrace
