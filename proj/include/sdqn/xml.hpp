#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sdqn::xml {

struct Attribute {
    std::string name;
    std::string value;

    bool operator==(const Attribute&) const = default;
};

struct Text {
    std::string value;

    bool operator==(const Text&) const = default;
};

struct Node;

/// An element node; a whole document is represented by its root Element.
struct Element {
    std::string tag;
    std::vector<Attribute> attributes;
    std::vector<Node> children;

    Element() = default;
    explicit Element(std::string tag_name) : tag(std::move(tag_name)) {}

    const std::string* attribute(std::string_view name) const;
    void set_attribute(std::string_view name, std::string value);
    bool erase_attribute(std::string_view name);

    Element* child(std::string_view tag_name);
    const Element* child(std::string_view tag_name) const;
    std::vector<const Element*> children_named(std::string_view tag_name) const;

    /// Concatenation of direct text children.
    std::string text() const;

    Element& add(Element e);
    Element& add_text(std::string value);
    /// Appends <tag>value</tag> and returns *this for chaining.
    Element& add_leaf(std::string tag_name, std::string value);
};

struct Node {
    std::variant<Element, Text> value;

    Node(Element e) : value(std::move(e)) {}
    Node(Text t) : value(std::move(t)) {}

    bool is_element() const noexcept { return std::holds_alternative<Element>(value); }
    Element& element() { return std::get<Element>(value); }
    const Element& element() const { return std::get<Element>(value); }
    Text& text() { return std::get<Text>(value); }
    const Text& text() const { return std::get<Text>(value); }
};

bool operator==(const Element& a, const Element& b);
bool operator==(const Node& a, const Node& b);

/// Parses a UTF-8 document made of elements, attributes, text and the
/// predefined/numeric entity references.
/// Comments, processing instructions, DTDs and CDATA raise unsupported-construct;
/// anything else ill-formed raises malformed-document with line:column.
Element parse(std::string_view document);

/// Canonical form: double-quoted attributes in stored order, `<t/>` for
/// childless elements, `&amp; &lt; &gt;` escaped in text and additionally
/// `&quot;` in attribute values. No whitespace is added.
std::string serialize(const Element& root);

bool is_valid_utf8(std::string_view s) noexcept;
bool is_valid_name(std::string_view s) noexcept;

} // namespace sdqn::xml
