"""Dataset I/O, preprocessing, augmentation and the synthetic crescent generator."""
