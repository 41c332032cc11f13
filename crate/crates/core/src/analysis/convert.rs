//! Converters from the native GQA and TextVQA release formats into
//! [`AnnotationRecord`]s. Predictions are joined by question id; a missing
//! prediction becomes an empty string.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Deserialize;
use thiserror::Error;

use super::{AnnBox, AnnotationRecord};

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("question {question}: image {image} has no scene graph")]
    MissingImage { question: String, image: String },
    #[error("question {question}: object {object} is not in the scene graph")]
    MissingObject { question: String, object: String },
}

#[derive(Deserialize)]
struct GqaQuestion {
    #[serde(rename = "imageId")]
    image_id: String,
    answer: String,
    #[serde(default)]
    annotations: GqaAnnotations,
}

#[derive(Deserialize, Default)]
struct GqaAnnotations {
    #[serde(default)]
    question: BTreeMap<String, String>,
    #[serde(default)]
    answer: BTreeMap<String, String>,
    #[serde(default, rename = "fullAnswer")]
    full_answer: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct GqaObject {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Deserialize)]
struct GqaScene {
    width: u32,
    height: u32,
    objects: BTreeMap<String, GqaObject>,
}

/// GQA questions plus scene graphs. The targets are every object any of the
/// question's annotations point at; the rest of the scene are distractors.
pub fn gqa_records(questions: &str, scene_graphs: &str, predictions: &HashMap<String, String>) -> Result<Vec<AnnotationRecord>, ConvertError> {
    let questions: BTreeMap<String, GqaQuestion> = serde_json::from_str(questions)?;
    let scenes: HashMap<String, GqaScene> = serde_json::from_str(scene_graphs)?;
    let mut out = Vec::with_capacity(questions.len());
    for (qid, q) in questions {
        let scene = scenes.get(&q.image_id).ok_or_else(|| ConvertError::MissingImage { question: qid.clone(), image: q.image_id.clone() })?;
        let a = &q.annotations;
        let targets: BTreeSet<&String> = a.question.values().chain(a.answer.values()).chain(a.full_answer.values()).collect();
        for t in &targets {
            if !scene.objects.contains_key(*t) {
                return Err(ConvertError::MissingObject { question: qid.clone(), object: (*t).clone() });
            }
        }
        let to_box = |o: &GqaObject| {
            // scene graph boxes occasionally overhang the image by a pixel
            let x = o.x.clamp(0.0, f64::from(scene.width));
            let y = o.y.clamp(0.0, f64::from(scene.height));
            AnnBox::new(x, y, o.w.min(f64::from(scene.width) - x).max(0.0), o.h.min(f64::from(scene.height) - y).max(0.0))
        };
        let (target_boxes, other_boxes) = scene.objects.iter().fold((Vec::new(), Vec::new()), |(mut t, mut o), (id, obj)| {
            if targets.contains(id) { &mut t } else { &mut o }.push(to_box(obj));
            (t, o)
        });
        out.push(AnnotationRecord {
            prediction: predictions.get(&qid).cloned().unwrap_or_default(),
            question_id: qid,
            width: scene.width,
            height: scene.height,
            answers: vec![q.answer],
            target_boxes,
            other_boxes,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct TextVqaFile {
    data: Vec<TextVqaEntry>,
}

#[derive(Deserialize)]
struct TextVqaEntry {
    question_id: serde_json::Value,
    image_width: u32,
    image_height: u32,
    answers: Vec<String>,
    #[serde(default)]
    ocr_info: Vec<OcrInfo>,
}

#[derive(Deserialize)]
struct OcrInfo {
    word: String,
    bounding_box: NormBox,
}

/// OCR boxes are normalised to the image size.
#[derive(Deserialize)]
struct NormBox {
    top_left_x: f64,
    top_left_y: f64,
    width: f64,
    height: f64,
}

/// A TextVQA release file with its bundled OCR tokens. Questions without
/// OCR tokens are skipped since they have no candidate box.
pub fn textvqa_records(file: &str, predictions: &HashMap<String, String>) -> Result<Vec<AnnotationRecord>, ConvertError> {
    let file: TextVqaFile = serde_json::from_str(file)?;
    let mut out = Vec::with_capacity(file.data.len());
    for e in file.data {
        if e.ocr_info.is_empty() {
            continue;
        }
        let qid = match &e.question_id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let (w, h) = (f64::from(e.image_width), f64::from(e.image_height));
        let target_boxes = e
            .ocr_info
            .into_iter()
            .map(|o| {
                let b = o.bounding_box;
                let x = (b.top_left_x * w).clamp(0.0, w);
                let y = (b.top_left_y * h).clamp(0.0, h);
                AnnBox { text: Some(o.word), ..AnnBox::new(x, y, (b.width * w).clamp(0.0, w - x), (b.height * h).clamp(0.0, h - y)) }
            })
            .collect();
        out.push(AnnotationRecord {
            prediction: predictions.get(&qid).cloned().unwrap_or_default(),
            question_id: qid,
            width: e.image_width,
            height: e.image_height,
            answers: e.answers,
            target_boxes,
            other_boxes: Vec::new(),
        });
    }
    Ok(out)
}
