#pragma once

#include <istream>
#include <string>
#include <vector>

#include "error.hpp"

namespace cars {

/// Minimal RFC 4180 reader: quoted fields may contain the delimiter, doubled
/// quotes and line breaks. Returns false at end of input.
class CsvReader {
public:
    explicit CsvReader(std::istream& in, char delimiter = ',') : in_(in), delimiter_(delimiter) {}

    bool next(std::vector<std::string>& fields) {
        fields.clear();
        std::string field;
        bool quoted = false;
        bool any = false;
        int ch;
        ++line_;
        start_line_ = line_;
        while ((ch = in_.get()) != std::char_traits<char>::eof()) {
            any = true;
            const char c = static_cast<char>(ch);
            if (quoted) {
                if (c == '"') {
                    if (in_.peek() == '"') {
                        field.push_back('"');
                        in_.get();
                    } else {
                        quoted = false;
                    }
                } else {
                    if (c == '\n') ++line_;
                    field.push_back(c);
                }
            } else if (c == '"' && field.empty()) {
                quoted = true;
            } else if (c == delimiter_) {
                fields.push_back(std::move(field));
                field.clear();
            } else if (c == '\n') {
                break;
            } else if (c != '\r') {
                field.push_back(c);
            }
        }
        if (quoted) throw ParseError("unterminated quoted field", start_line_);
        if (!any) return false;
        fields.push_back(std::move(field));
        return true;
    }

    /// Line on which the last returned record started (1-based).
    std::size_t line() const noexcept { return start_line_; }

private:
    std::istream& in_;
    char delimiter_;
    std::size_t line_ = 0;
    std::size_t start_line_ = 0;
};

} // namespace cars
