//! Prompt-template rendering. A template covers the four prompt forms:
//! exemplar (image + attributes + label), query (image + attributes),
//! attribute-conditioned null (attributes only) and the content-free null.
//! Null forms never reference image content.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::ClassLabelSet;

use super::BackendError;

/// One part of a rendered multimodal message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PromptPart {
    Text { text: String },
    /// An image by opaque handle; backends resolve the handle when they
    /// build the wire request.
    Image { image_ref: String },
}

/// Template with placeholder-bearing question forms. `{subject}` is replaced
/// by `subject_form` when an image accompanies the question and by
/// `null_subject_form` otherwise; `{name}` is replaced by the attribute
/// value for `name`; `{attributes}` expands to a `name=value` listing of all
/// provided attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub question_with_attributes: String,
    pub question_without_attributes: String,
    pub subject_form: String,
    pub null_subject_form: String,
    #[serde(default)]
    pub answer_prefix: String,
}

impl PromptTemplate {
    /// Fundus-classification template mirroring the canonical example forms.
    pub fn fundus_example() -> Self {
        Self {
            template_id: "fundus-glaucoma-v1".into(),
            question_with_attributes: "Does {subject} of a {sex} show glaucoma?".into(),
            question_without_attributes: "Does {subject} show glaucoma?".into(),
            subject_form: "the fundus".into(),
            null_subject_form: "an arbitrary fundus".into(),
            answer_prefix: " ".into(),
        }
    }

    /// Attribute-agnostic template for synthetic tasks.
    pub fn synthetic_default() -> Self {
        Self {
            template_id: "synthetic-v1".into(),
            question_with_attributes:
                "Given a patient with {attributes}, does {subject} show the condition?".into(),
            question_without_attributes: "Does {subject} show the condition?".into(),
            subject_form: "the image".into(),
            null_subject_form: "an arbitrary image".into(),
            answer_prefix: " ".into(),
        }
    }
}

fn substitute(
    form: &str,
    subject: &str,
    attributes: Option<&BTreeMap<String, String>>,
) -> Result<String, BackendError> {
    let mut text = form.replace("{subject}", subject);
    if let Some(attrs) = attributes {
        let listing = attrs
            .iter()
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(", ");
        text = text.replace("{attributes}", &listing);
        for (name, value) in attrs {
            text = text.replace(&format!("{{{name}}}"), value);
        }
    }
    if let Some(start) = text.find('{') {
        let end = text[start..].find('}').map(|e| start + e + 1).unwrap_or(text.len());
        return Err(BackendError::UnresolvedPlaceholder(
            text[start..end].to_string(),
        ));
    }
    Ok(text)
}

/// Renders one message's parts for any of the four prompt forms. A label
/// requires both image and attributes (the exemplar form); null forms carry
/// no image part.
pub fn render(
    template: &PromptTemplate,
    classes: &ClassLabelSet,
    image: Option<&str>,
    attributes: Option<&BTreeMap<String, String>>,
    label: Option<usize>,
) -> Result<Vec<PromptPart>, BackendError> {
    if label.is_some() && (image.is_none() || attributes.is_none()) {
        return Err(BackendError::LabelWithoutImage);
    }
    let subject = if image.is_some() {
        &template.subject_form
    } else {
        &template.null_subject_form
    };
    let question = match attributes {
        Some(attrs) if !attrs.is_empty() => {
            substitute(&template.question_with_attributes, subject, Some(attrs))?
        }
        _ => substitute(&template.question_without_attributes, subject, None)?,
    };
    let mut parts = Vec::new();
    if let Some(image_ref) = image {
        parts.push(PromptPart::Image {
            image_ref: image_ref.to_string(),
        });
    }
    parts.push(PromptPart::Text { text: question });
    if let Some(label) = label {
        let class = classes
            .classes()
            .get(label)
            .ok_or(BackendError::BadLabel(label))?;
        parts.push(PromptPart::Text {
            text: format!("{}{}", template.answer_prefix, class.label_token),
        });
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> ClassLabelSet {
        ClassLabelSet::from_pairs(&[("negative", "Negative"), ("positive", "Positive")]).unwrap()
    }

    fn attrs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(a, v)| (a.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn exemplar_form_has_image_question_answer() {
        let parts = render(
            &PromptTemplate::fundus_example(),
            &classes(),
            Some("img0.png"),
            Some(&attrs(&[("sex", "male")])),
            Some(0),
        )
        .unwrap();
        assert_eq!(
            parts,
            vec![
                PromptPart::Image {
                    image_ref: "img0.png".into()
                },
                PromptPart::Text {
                    text: "Does the fundus of a male show glaucoma?".into()
                },
                PromptPart::Text {
                    text: " Negative".into()
                },
            ]
        );
    }

    #[test]
    fn subgroup_null_form_uses_null_subject_and_no_image() {
        let parts = render(
            &PromptTemplate::fundus_example(),
            &classes(),
            None,
            Some(&attrs(&[("sex", "male")])),
            None,
        )
        .unwrap();
        assert_eq!(
            parts,
            vec![PromptPart::Text {
                text: "Does an arbitrary fundus of a male show glaucoma?".into()
            }]
        );
    }

    #[test]
    fn population_null_form() {
        let parts = render(&PromptTemplate::fundus_example(), &classes(), None, None, None)
            .unwrap();
        assert_eq!(
            parts,
            vec![PromptPart::Text {
                text: "Does an arbitrary fundus show glaucoma?".into()
            }]
        );
    }

    #[test]
    fn label_without_image_is_rejected() {
        let err = render(
            &PromptTemplate::fundus_example(),
            &classes(),
            None,
            Some(&attrs(&[("sex", "male")])),
            Some(0),
        )
        .unwrap_err();
        assert!(matches!(err, BackendError::LabelWithoutImage));
    }

    #[test]
    fn unresolved_placeholder_errors() {
        let err = render(
            &PromptTemplate::fundus_example(),
            &classes(),
            Some("img.png"),
            Some(&attrs(&[("age", "young")])),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, BackendError::UnresolvedPlaceholder(_)));
    }

    #[test]
    fn attributes_listing_placeholder() {
        let parts = render(
            &PromptTemplate::synthetic_default(),
            &classes(),
            None,
            Some(&attrs(&[("age", "elder"), ("sex", "male")])),
            None,
        )
        .unwrap();
        assert_eq!(
            parts,
            vec![PromptPart::Text {
                text: "Given a patient with age=elder, sex=male, does an arbitrary image show the condition?"
                    .into()
            }]
        );
    }
}
