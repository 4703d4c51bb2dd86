"""Label-encoder-guided multimodal emotion and sentiment recognition.

Three transformer encoders (vision, language, audio) feed a cross-modal
decoder that fuses one modality per layer into a query state seeded by a
prompt-wrapped task embedding from a frozen text encoder. Prediction is the
cosine similarity between the fused state and label embeddings from the same
frozen encoder, so labels may be words, phrases, or whole sentences.
"""

__version__ = "0.1.0"
