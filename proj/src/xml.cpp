#include "sdqn/xml.hpp"

#include "sdqn/error.hpp"

#include <algorithm>
#include <cstdint>

namespace sdqn::xml {

const std::string* Element::attribute(std::string_view name) const {
    for (const auto& a : attributes) {
        if (a.name == name) return &a.value;
    }
    return nullptr;
}

void Element::set_attribute(std::string_view name, std::string value) {
    for (auto& a : attributes) {
        if (a.name == name) {
            a.value = std::move(value);
            return;
        }
    }
    attributes.push_back({std::string(name), std::move(value)});
}

bool Element::erase_attribute(std::string_view name) {
    const auto it = std::find_if(attributes.begin(), attributes.end(), [&](const auto& a) { return a.name == name; });
    if (it == attributes.end()) return false;
    attributes.erase(it);
    return true;
}

Element* Element::child(std::string_view tag_name) {
    for (auto& c : children) {
        if (c.is_element() && c.element().tag == tag_name) return &c.element();
    }
    return nullptr;
}

const Element* Element::child(std::string_view tag_name) const {
    for (const auto& c : children) {
        if (c.is_element() && c.element().tag == tag_name) return &c.element();
    }
    return nullptr;
}

std::vector<const Element*> Element::children_named(std::string_view tag_name) const {
    std::vector<const Element*> out;
    for (const auto& c : children) {
        if (c.is_element() && c.element().tag == tag_name) out.push_back(&c.element());
    }
    return out;
}

std::string Element::text() const {
    std::string out;
    for (const auto& c : children) {
        if (!c.is_element()) out += c.text().value;
    }
    return out;
}

Element& Element::add(Element e) {
    children.emplace_back(std::move(e));
    return children.back().element();
}

Element& Element::add_text(std::string value) {
    children.emplace_back(Text{std::move(value)});
    return *this;
}

Element& Element::add_leaf(std::string tag_name, std::string value) {
    Element leaf(std::move(tag_name));
    if (!value.empty()) leaf.add_text(std::move(value));
    children.emplace_back(std::move(leaf));
    return *this;
}

bool operator==(const Element& a, const Element& b) {
    return a.tag == b.tag && a.attributes == b.attributes && a.children == b.children;
}

bool operator==(const Node& a, const Node& b) { return a.value == b.value; }

bool is_valid_utf8(std::string_view s) noexcept {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<std::uint8_t>(s[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xe0) == 0xc0) {
            len = 2;
            cp = c & 0x1f;
        } else if ((c & 0xf0) == 0xe0) {
            len = 3;
            cp = c & 0x0f;
        } else if ((c & 0xf8) == 0xf0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<std::uint8_t>(s[i + k]);
            if ((cc & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        // Overlong forms, surrogates and out-of-range code points.
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
        if (cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
        i += len;
    }
    return true;
}

namespace {

bool name_start(unsigned char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_' || c == ':' || c >= 0x80;
}

bool name_char(unsigned char c) {
    return name_start(c) || (c >= '0' && c <= '9') || c == '-' || c == '.';
}

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
}

class Parser {
public:
    explicit Parser(std::string_view doc) : doc_(doc) {}

    Element run() {
        if (!is_valid_utf8(doc_)) fail("document is not valid UTF-8");
        skip_ws();
        check_markup();
        if (!at('<')) fail("expected root element");
        Element root = element();
        skip_ws();
        if (pos_ != doc_.size()) {
            check_markup();
            fail("content after root element");
        }
        return root;
    }

private:
    [[noreturn]] void fail(const std::string& msg, Errc code = Errc::malformed_document) const {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i < pos_ && i < doc_.size(); ++i) {
            if (doc_[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw Error(code, msg + " at " + std::to_string(line) + ":" + std::to_string(col) + " (byte " +
                              std::to_string(pos_) + ")");
    }

    bool at(char c) const { return pos_ < doc_.size() && doc_[pos_] == c; }
    bool starts_with(std::string_view s) const { return doc_.substr(pos_).starts_with(s); }

    void expect(char c) {
        if (!at(c)) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    void skip_ws() {
        while (pos_ < doc_.size() &&
               (doc_[pos_] == ' ' || doc_[pos_] == '\t' || doc_[pos_] == '\n' || doc_[pos_] == '\r')) {
            ++pos_;
        }
    }

    void check_markup() const {
        if (starts_with("<!--")) fail("comments are not supported", Errc::unsupported_construct);
        if (starts_with("<?")) fail("processing instructions are not supported", Errc::unsupported_construct);
        if (starts_with("<![CDATA[")) fail("CDATA sections are not supported", Errc::unsupported_construct);
        if (starts_with("<!")) fail("DTDs are not supported", Errc::unsupported_construct);
    }

    std::string name() {
        const auto start = pos_;
        if (pos_ >= doc_.size() || !name_start(static_cast<unsigned char>(doc_[pos_]))) fail("expected a name");
        while (pos_ < doc_.size() && name_char(static_cast<unsigned char>(doc_[pos_]))) ++pos_;
        return std::string(doc_.substr(start, pos_ - start));
    }

    void entity(std::string& out) {
        const auto semi = doc_.find(';', pos_);
        if (semi == std::string_view::npos || semi - pos_ > 12) fail("unterminated entity reference");
        const auto ref = doc_.substr(pos_ + 1, semi - pos_ - 1);
        if (ref == "amp") out.push_back('&');
        else if (ref == "lt") out.push_back('<');
        else if (ref == "gt") out.push_back('>');
        else if (ref == "quot") out.push_back('"');
        else if (ref == "apos") out.push_back('\'');
        else if (ref.size() > 1 && ref[0] == '#') {
            std::uint32_t cp = 0;
            const bool hex = ref[1] == 'x';
            const auto digits = ref.substr(hex ? 2 : 1);
            if (digits.empty()) fail("empty character reference");
            for (char c : digits) {
                int v = -1;
                if (c >= '0' && c <= '9') v = c - '0';
                else if (hex && c >= 'a' && c <= 'f') v = c - 'a' + 10;
                else if (hex && c >= 'A' && c <= 'F') v = c - 'A' + 10;
                if (v < 0) fail("bad character reference");
                cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(v);
                if (cp > 0x10ffff) fail("character reference out of range");
            }
            if (cp == 0 || (cp >= 0xd800 && cp <= 0xdfff)) fail("invalid character reference");
            append_utf8(out, cp);
        } else {
            fail("unknown entity '&" + std::string(ref) + ";'");
        }
        pos_ = semi + 1;
    }

    std::string attribute_value() {
        if (!at('"') && !at('\'')) fail("expected quoted attribute value");
        const char quote = doc_[pos_++];
        std::string out;
        while (true) {
            if (pos_ >= doc_.size()) fail("unterminated attribute value");
            const char c = doc_[pos_];
            if (c == quote) {
                ++pos_;
                return out;
            }
            if (c == '<') fail("'<' in attribute value");
            if (c == '&') {
                entity(out);
            } else {
                out.push_back(c);
                ++pos_;
            }
        }
    }

    Element element() {
        expect('<');
        Element e(name());
        while (true) {
            const auto before = pos_;
            skip_ws();
            if (at('/')) {
                ++pos_;
                expect('>');
                return e;
            }
            if (at('>')) {
                ++pos_;
                break;
            }
            if (pos_ == before) fail("expected whitespace before attribute");
            auto attr_name = name();
            skip_ws();
            expect('=');
            skip_ws();
            auto value = attribute_value();
            if (e.attribute(attr_name) != nullptr) fail("duplicate attribute '" + attr_name + "'");
            e.attributes.push_back({std::move(attr_name), std::move(value)});
        }
        content(e);
        return e;
    }

    void content(Element& e) {
        std::string text;
        const auto flush = [&] {
            if (!text.empty()) {
                e.children.emplace_back(Text{std::move(text)});
                text.clear();
            }
        };
        while (true) {
            if (pos_ >= doc_.size()) fail("unexpected end of document inside <" + e.tag + ">");
            const char c = doc_[pos_];
            if (c == '<') {
                check_markup();
                flush();
                if (starts_with("</")) {
                    pos_ += 2;
                    const auto close = name();
                    if (close != e.tag) fail("mismatched closing tag </" + close + "> for <" + e.tag + ">");
                    skip_ws();
                    expect('>');
                    return;
                }
                e.children.emplace_back(element());
            } else if (c == '&') {
                entity(text);
            } else {
                text.push_back(c);
                ++pos_;
            }
        }
    }

    std::string_view doc_;
    std::size_t pos_ = 0;
};

void escape_into(std::string& out, std::string_view s, bool attribute) {
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"':
            if (attribute) out += "&quot;";
            else out.push_back(c);
            break;
        default: out.push_back(c);
        }
    }
}

void serialize_into(std::string& out, const Element& e) {
    out.push_back('<');
    out += e.tag;
    for (const auto& a : e.attributes) {
        out.push_back(' ');
        out += a.name;
        out += "=\"";
        escape_into(out, a.value, true);
        out.push_back('"');
    }
    if (e.children.empty()) {
        out += "/>";
        return;
    }
    out.push_back('>');
    for (const auto& c : e.children) {
        if (c.is_element()) serialize_into(out, c.element());
        else escape_into(out, c.text().value, false);
    }
    out += "</";
    out += e.tag;
    out.push_back('>');
}

} // namespace

bool is_valid_name(std::string_view s) noexcept {
    if (s.empty() || !name_start(static_cast<unsigned char>(s.front()))) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return name_char(static_cast<unsigned char>(c)); });
}

Element parse(std::string_view document) { return Parser(document).run(); }

std::string serialize(const Element& root) {
    std::string out;
    serialize_into(out, root);
    return out;
}

} // namespace sdqn::xml
